from django.apps import AppConfig


class WhiteningConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'services.whitening'
    verbose_name = 'PCA and whitening'
