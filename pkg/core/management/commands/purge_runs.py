"""
Management command to delete the experiment run history.
"""
from django.core.management.base import BaseCommand

from core.models import CheckRecord, ExperimentRun


class Command(BaseCommand):
    help = 'Delete recorded experiment runs and their check records'

    def add_arguments(self, parser):
        parser.add_argument(
            '--keep-failed',
            action='store_true',
            help='Keep runs that failed or raised an error',
        )

    def handle(self, *args, **options):
        runs = ExperimentRun.objects.all()
        if options['keep_failed']:
            runs = runs.filter(success=True)

        check_count = CheckRecord.objects.filter(run__in=runs).count()
        run_count = runs.count()
        runs.delete()
        self.stdout.write(self.style.SUCCESS(f'Deleted {run_count} runs and {check_count} check records'))

        if options['keep_failed']:
            kept = ExperimentRun.objects.count()
            self.stdout.write(self.style.WARNING(f'Kept {kept} failed runs'))
