from django.apps import AppConfig


class BridgeConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'services.bridge'
    verbose_name = 'Visual-semantic bridge (CCA)'
