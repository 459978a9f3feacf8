"""Figure regeneration from rrmbench result CSVs.

No metric is recomputed here: every curve is a direct rendering of columns
the benchmark wrote.
"""

__version__ = "0.1.0"
