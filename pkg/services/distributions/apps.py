from django.apps import AppConfig


class DistributionsConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'services.distributions'
    verbose_name = 'Output distributions'
