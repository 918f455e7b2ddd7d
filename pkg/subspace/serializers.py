from rest_framework import serializers

DECOMPOSE_METHODS = ("hosvd", "asi")


class DecomposeOptionsSerializer(serializers.Serializer):
    """Validated options of the decompose command (TOML [decompose] plus flags)."""

    eps = serializers.FloatField(min_value=0.0, max_value=1.0, required=False, allow_null=True)
    rank = serializers.IntegerField(min_value=1, required=False, allow_null=True)
    ranks = serializers.ListField(child=serializers.IntegerField(min_value=1), required=False, allow_null=True)
    method = serializers.ChoiceField(choices=DECOMPOSE_METHODS, default="hosvd")
    steps = serializers.IntegerField(min_value=1, default=10)

    def validate(self, attrs):
        if attrs.get("method") == "asi" and not attrs.get("ranks"):
            raise serializers.ValidationError("ASI decomposition needs explicit --ranks")
        if attrs.get("eps") is not None and attrs.get("ranks"):
            raise serializers.ValidationError("Give either --eps or --ranks, not both")
        return attrs
