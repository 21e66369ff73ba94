"""
Management command for the change-of-measure (W*) representation.
"""
from core.management.base import ExperimentCommand


class Command(ExperimentCommand):
    """
    Django management command to run the scalar W* equation or the
    Q-weighted estimators.
    """
    help = 'Reconstruct trajectories from the scalar W* process, or estimate averages under Q'
    modes = ('girsanov-scalar', 'girsanov-weighted')
    default_mode = 'girsanov-scalar'
