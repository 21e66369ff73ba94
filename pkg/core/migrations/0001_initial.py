# Generated by Django 4.2.9 on 2026-10-17 09:00

import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='ExperimentRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('mode', models.CharField(max_length=64, verbose_name='Mode')),
                ('fixture', models.CharField(max_length=200, verbose_name='Fixture')),
                ('fixture_hash', models.CharField(blank=True, max_length=64, verbose_name='Fixture hash')),
                ('seed', models.DecimalField(decimal_places=0, max_digits=20, verbose_name='Master seed')),
                ('config_hash', models.CharField(max_length=64, verbose_name='Config hash')),
                ('n_trajectories', models.IntegerField(default=0, verbose_name='Trajectories')),
                ('output_dir', models.CharField(blank=True, max_length=500, verbose_name='Output directory')),
                ('started_at', models.DateTimeField(auto_now_add=True, verbose_name='Started at')),
                ('finished_at', models.DateTimeField(blank=True, null=True, verbose_name='Finished at')),
                ('checks_passed', models.IntegerField(default=0, verbose_name='Checks passed')),
                ('checks_failed', models.IntegerField(default=0, verbose_name='Checks failed')),
                ('errors', models.TextField(blank=True, verbose_name='Errors')),
                ('success', models.BooleanField(default=False, verbose_name='Success')),
            ],
            options={
                'verbose_name': 'Experiment Run',
                'verbose_name_plural': 'Experiment Runs',
                'ordering': ['-started_at'],
                'indexes': [models.Index(fields=['mode', '-started_at'], name='core_run_mode_started_idx')],
            },
        ),
        migrations.CreateModel(
            name='CheckRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('name', models.CharField(max_length=100, verbose_name='Name')),
                ('statistic', models.FloatField(blank=True, null=True, verbose_name='Statistic')),
                ('target', models.FloatField(blank=True, null=True, verbose_name='Target')),
                ('tolerance', models.FloatField(blank=True, null=True, verbose_name='Tolerance')),
                ('n_samples', models.IntegerField(default=0, verbose_name='Samples')),
                ('passed', models.BooleanField(default=False, verbose_name='Passed')),
                ('p_value', models.FloatField(blank=True, null=True, verbose_name='p-value')),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='checks', to='core.experimentrun', verbose_name='Run')),
            ],
            options={
                'verbose_name': 'Check Record',
                'verbose_name_plural': 'Check Records',
                'ordering': ['run', 'id'],
            },
        ),
    ]
