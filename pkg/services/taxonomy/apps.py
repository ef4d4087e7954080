from django.apps import AppConfig


class TaxonomyConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'services.taxonomy'
    verbose_name = 'Class taxonomy and semantic features'
