"""Decoupled tracking-then-referring toolkit with synthetic, verifiable data.

Modules: ``core`` (boxes, tracklets, files), ``nn`` (numpy autodiff),
``kalman`` (vanilla and neural-noise filters), ``assignment``, ``tracker``,
``refer`` (two-stream scorer), ``calibration``, ``metrics``, ``synth`` and
``cli``.
"""

__version__ = "0.1.0"
