from django.apps import AppConfig


class CostModelConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'cost_model'
    verbose_name = 'FLOP and memory cost model'
