from rest_framework import serializers

from cost_model.services.cost_formulas import FULL


class RankField(serializers.Field):
    """A positive integer or the literal "full"."""

    def to_internal_value(self, data):
        if isinstance(data, str) and data.strip().lower() == FULL:
            return FULL
        try:
            value = int(data)
        except (TypeError, ValueError):
            raise serializers.ValidationError(f"Expected a positive integer or '{FULL}', got {data!r}")
        if value < 1:
            raise serializers.ValidationError(f"Rank must be positive, got {value}")
        return value

    def to_representation(self, value):
        return value


class CostGridSerializer(serializers.Serializer):
    """Grid of the cost command; lists come from TOML or comma-separated flags."""

    batch = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1)
    tokens = serializers.ListField(child=serializers.IntegerField(min_value=1), required=False)
    spatial = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=2, max_length=2),
        required=False,
    )
    in_features = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1)
    out_features = serializers.ListField(child=serializers.IntegerField(min_value=1), required=False)
    rank = serializers.ListField(child=RankField(), min_length=1, default=[FULL])
    activation_ranks = serializers.ListField(child=serializers.JSONField(), min_length=1, default=[FULL])
    svg = serializers.BooleanField(default=False)

    def validate(self, attrs):
        if bool(attrs.get("tokens")) == bool(attrs.get("spatial")):
            raise serializers.ValidationError("Give exactly one of tokens or spatial windows")
        return attrs
