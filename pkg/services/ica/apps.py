from django.apps import AppConfig


class IndependentComponentsConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'services.ica'
    verbose_name = 'Independent component analysis'
