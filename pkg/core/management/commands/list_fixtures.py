"""
Management command to list the available fixtures.
"""
from pathlib import Path

from django.core.management.base import BaseCommand

from reduction.conf import get_section
from reduction.exceptions import ReductionError
from reduction.fixtures import BUILTIN_FIXTURES, load_fixture


class Command(BaseCommand):
    """
    Django management command to print built-in and directory fixtures with
    their dimension, number of levels, H₀ and V₀.
    """
    help = 'List built-in fixtures and those in the configured fixture directory'

    def handle(self, *args, **options):
        references = list(BUILTIN_FIXTURES)
        directory = get_section('fixtures').get('directory')
        if directory and Path(directory).is_dir():
            references += [str(path) for path in sorted(Path(directory).glob('*.json'))]

        for reference in references:
            try:
                summary = load_fixture(reference).summary()
            except ReductionError as e:
                self.stderr.write(self.style.ERROR(f"{reference}: {e}"))
                continue
            self.stdout.write(self.style.SUCCESS(summary['name']))
            self.stdout.write(
                f"  N={summary['dimension']} D={summary['levels']} "
                f"H0={summary['H0']:.6g} V0={summary['V0']:.6g} "
                f"mixture={'yes' if summary['mixture'] else 'no'}"
            )
            if summary['description']:
                self.stdout.write(f"  {summary['description']}")
