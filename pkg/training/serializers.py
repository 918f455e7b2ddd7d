from rest_framework import serializers

from subspace.services.weight_subspace import UPDATE_SIGNS, WSI_VARIANTS
from training.services.layers import MODES, WARM_START_SCOPES
from training.services.models import MODEL_KINDS
from training.services.optim import SCHEDULES
from training.services.trainer import DEFAULT_THRESHOLDS, RANK_SOURCES


class TrainConfigSerializer(serializers.Serializer):
    """[model] + [train] sections with flags layered on top."""

    data = serializers.CharField(default="synthetic:easy")
    model = serializers.ChoiceField(choices=MODEL_KINDS, default="mlp")
    mode = serializers.ChoiceField(choices=MODES, default="wasi")
    epsilon = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.9)
    rank = serializers.IntegerField(min_value=1, required=False, allow_null=True)
    rank_source = serializers.ChoiceField(choices=RANK_SOURCES, default="epsilon")
    activation_ranks = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=3, max_length=4),
        required=False,
        allow_null=True,
    )
    budget = serializers.IntegerField(min_value=0, required=False, allow_null=True)
    perplexity_target = serializers.FloatField(min_value=0.0, required=False, allow_null=True)
    thresholds = serializers.ListField(
        child=serializers.FloatField(min_value=0.0, max_value=1.0), min_length=1, default=list(DEFAULT_THRESHOLDS)
    )
    lr = serializers.FloatField(min_value=0.0, default=0.05)
    momentum = serializers.FloatField(min_value=0.0, default=0.0)
    weight_decay = serializers.FloatField(min_value=0.0, default=1e-4)
    clip_norm = serializers.FloatField(min_value=0.0, default=2.0)
    epochs = serializers.IntegerField(min_value=1, default=50)
    batch_size = serializers.IntegerField(min_value=1, default=128)
    schedule = serializers.ChoiceField(choices=SCHEDULES, default="cosine")
    warmup_steps = serializers.IntegerField(min_value=0, default=0)
    min_lr = serializers.FloatField(min_value=0.0, default=0.0)
    threads = serializers.IntegerField(min_value=1, default=1)
    wsi_variant = serializers.ChoiceField(choices=WSI_VARIANTS, default="refresh")
    update_sign = serializers.ChoiceField(choices=UPDATE_SIGNS, default="descent")
    warm_start_scope = serializers.ChoiceField(choices=WARM_START_SCOPES, default="iteration")
    compress_batch_mode = serializers.BooleanField(default=True)
    tokens = serializers.IntegerField(min_value=1, default=4)
    hidden = serializers.IntegerField(min_value=1, default=32)
    width = serializers.IntegerField(min_value=1, default=16)
    window = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=2, max_length=2,
                                   default=[2, 2])
    checkpoint = serializers.BooleanField(default=True)
    progress = serializers.BooleanField(default=False)

    def validate_epsilon(self, value):
        if value <= 0.0:
            raise serializers.ValidationError("epsilon must lie in (0, 1]")
        return value

    def validate_lr(self, value):
        if value <= 0.0:
            raise serializers.ValidationError("Learning rate must be positive")
        return value

    def validate(self, attrs):
        if attrs.get("budget") is not None and attrs.get("perplexity_target") is not None:
            raise serializers.ValidationError("Give at most one of budget or perplexity_target")
        if attrs.get("budget") is not None and attrs["rank_source"] == "epsilon":
            attrs["rank_source"] = "budget"
        if attrs.get("perplexity_target") is not None and attrs["rank_source"] == "epsilon":
            attrs["rank_source"] = "perplexity"
        if attrs.get("activation_ranks") and attrs["rank_source"] == "epsilon":
            attrs["rank_source"] = "ranks"
        return attrs
