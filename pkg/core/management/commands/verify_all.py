"""
Management command to run the full verification suite.
"""
from core.management.base import ExperimentCommand


class Command(ExperimentCommand):
    """
    Django management command to verify every law against a fresh ensemble.

    Exits with status 1 if any check fails.
    """
    help = 'Run all statistical and numerical checks and write report.json'
    modes = ('verify-all',)
    default_mode = 'verify-all'
