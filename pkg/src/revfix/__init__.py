"""revfix: learns code-fix suggestions from historical review data.

Pipeline: mine review events -> clean triples -> localize the reviewed
change -> lossless tokenization -> framed sequences + dual vocabulary ->
pointer-generator training -> beam-search suggestions applied as patches ->
top-k exact-match evaluation.
"""

__version__ = "0.1.0"
