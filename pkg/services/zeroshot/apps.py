from django.apps import AppConfig


class ZeroshotConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'services.zeroshot'
    verbose_name = 'Zero-shot prediction and evaluation'
