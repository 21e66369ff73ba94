"""
Models for the reduction lab run history.
"""
from django.db import models
from django.utils.translation import gettext_lazy as _


class ExperimentRun(models.Model):
    """
    Log for one experiment run.
    """
    mode = models.CharField(_("Mode"), max_length=64)
    fixture = models.CharField(_("Fixture"), max_length=200)
    fixture_hash = models.CharField(_("Fixture hash"), max_length=64, blank=True)
    seed = models.DecimalField(_("Master seed"), max_digits=20, decimal_places=0)
    config_hash = models.CharField(_("Config hash"), max_length=64)
    n_trajectories = models.IntegerField(_("Trajectories"), default=0)
    output_dir = models.CharField(_("Output directory"), max_length=500, blank=True)
    started_at = models.DateTimeField(_("Started at"), auto_now_add=True)
    finished_at = models.DateTimeField(_("Finished at"), null=True, blank=True)
    checks_passed = models.IntegerField(_("Checks passed"), default=0)
    checks_failed = models.IntegerField(_("Checks failed"), default=0)
    errors = models.TextField(_("Errors"), blank=True)
    success = models.BooleanField(_("Success"), default=False)

    class Meta:
        verbose_name = _("Experiment Run")
        verbose_name_plural = _("Experiment Runs")
        ordering = ['-started_at']
        indexes = [
            models.Index(fields=['mode', '-started_at'], name='core_run_mode_started_idx'),
        ]

    def __str__(self):
        return f"{self.mode} on {self.fixture} - {self.started_at}"


class CheckRecord(models.Model):
    """
    Outcome of one verification check within a run.
    """
    run = models.ForeignKey(
        ExperimentRun,
        on_delete=models.CASCADE,
        related_name="checks",
        verbose_name=_("Run")
    )
    name = models.CharField(_("Name"), max_length=100)
    statistic = models.FloatField(_("Statistic"), null=True, blank=True)
    target = models.FloatField(_("Target"), null=True, blank=True)
    tolerance = models.FloatField(_("Tolerance"), null=True, blank=True)
    n_samples = models.IntegerField(_("Samples"), default=0)
    passed = models.BooleanField(_("Passed"), default=False)
    p_value = models.FloatField(_("p-value"), null=True, blank=True)

    class Meta:
        verbose_name = _("Check Record")
        verbose_name_plural = _("Check Records")
        ordering = ['run', 'id']

    def __str__(self):
        verdict = 'passed' if self.passed else 'failed'
        return f"{self.name} {verdict}"
