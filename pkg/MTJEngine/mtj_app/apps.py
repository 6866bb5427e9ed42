from django.apps import AppConfig


class MtjAppConfig(AppConfig):
    name = 'MTJEngine.mtj_app'
    label = 'mtj_app'
    verbose_name = 'MTJ switching toolbox'
