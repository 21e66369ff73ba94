"""
Management command to solve the dephasing master equation.
"""
from core.management.base import ExperimentCommand


class Command(ExperimentCommand):
    """
    Django management command to write the ensemble density on a time grid.
    """
    help = 'Solve the master equation in closed form or by RK4 and write densities.json'
    modes = ('lindblad-closed', 'lindblad-ode')
    default_mode = 'lindblad-closed'
