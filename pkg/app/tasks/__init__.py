# Tasks module for Celery
