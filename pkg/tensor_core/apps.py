from django.apps import AppConfig


class TensorCoreConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'tensor_core'
    verbose_name = 'Tensor arithmetic and operation counting'
