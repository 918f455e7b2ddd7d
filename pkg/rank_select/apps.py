from django.apps import AppConfig


class RankSelectConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'rank_select'
    verbose_name = 'Activation rank selection'
