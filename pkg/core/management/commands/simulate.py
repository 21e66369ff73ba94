"""
Management command to integrate an ensemble of the reduction SDE.
"""
from core.management.base import ExperimentCommand


class Command(ExperimentCommand):
    """
    Django management command to simulate state-vector trajectories.
    """
    help = 'Integrate an ensemble of the reduction SDE and write trajectories.csv'
    modes = ('sde',)
    default_mode = 'sde'
