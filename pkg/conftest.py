import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'outputica.settings')
django.setup()
