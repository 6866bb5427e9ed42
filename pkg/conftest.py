"""pytest wiring: load the Django settings that manage.py would use."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'config.settings')
django.setup()
