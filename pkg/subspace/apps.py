from django.apps import AppConfig


class SubspaceConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'subspace'
    verbose_name = 'Weight and activation subspace iteration'
