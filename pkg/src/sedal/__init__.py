"""Active learning for sound event detection.

Segments unlabeled audio at detected change points, queries an
annotator (human over HTTP, or a simulated one driven by ground
truth) for weak labels on the most informative segments, and trains
an attention-pooled detector from the partially labeled recordings.
"""

__version__ = "0.1.0"
