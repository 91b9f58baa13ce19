"""radpipe: radiology report pairing, instruction datasets, generation, and
blind multi-rater evaluation.

The pipeline, end to end: load raw report files and cut them into labeled
sections (:mod:`radpipe.ingest`), keep reports with a usable findings and
impression pair (:mod:`radpipe.preprocess`), assign train/val/test
(:mod:`radpipe.splits`), emit instruction-tuning records plus a LoRA
training manifest (:mod:`radpipe.dataset`), generate candidate impressions
from HTTP completion backends (:mod:`radpipe.gateway`), and score the
candidates blind with multiple raters (:mod:`radpipe.study`,
:mod:`radpipe.service`). ``radpipe --help`` shows the CLI over all of it.
"""

__version__ = "0.1.0"
