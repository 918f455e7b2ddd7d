from rest_framework import serializers

DEFAULT_THRESHOLDS = [0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]


class PlanOptionsSerializer(serializers.Serializer):
    """Options of the plan command (TOML [plan] plus flags)."""

    budget = serializers.IntegerField(min_value=0, required=False, allow_null=True)
    perplexity_target = serializers.FloatField(min_value=0.0, required=False, allow_null=True)
    thresholds = serializers.ListField(
        child=serializers.FloatField(min_value=0.0, max_value=1.0),
        min_length=1,
        default=DEFAULT_THRESHOLDS,
    )
    table = serializers.CharField(required=False, allow_null=True, allow_blank=False)

    def validate_thresholds(self, value):
        if any(t <= 0.0 for t in value):
            raise serializers.ValidationError("Thresholds must be positive")
        if any(b <= a for a, b in zip(value, value[1:])):
            raise serializers.ValidationError("Thresholds must be strictly ascending")
        return value


class PerplexityTableSerializer(serializers.Serializer):
    """Shape check of a perplexity table read back from JSON."""

    thresholds = serializers.ListField(child=serializers.FloatField(), min_length=1)
    layers = serializers.ListField(child=serializers.CharField(), required=False)
    perplexity = serializers.ListField(child=serializers.ListField(child=serializers.FloatField(min_value=0.0)))
    ranks = serializers.ListField(
        child=serializers.ListField(child=serializers.ListField(child=serializers.IntegerField(min_value=1)))
    )
    dims = serializers.ListField(child=serializers.ListField(child=serializers.IntegerField(min_value=1)), min_length=1)

    def validate(self, attrs):
        layers = len(attrs["dims"])
        if len(attrs["perplexity"]) != layers or len(attrs["ranks"]) != layers:
            raise serializers.ValidationError("perplexity, ranks and dims must list the same layers")
        return attrs
