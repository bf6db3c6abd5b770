"""groundlex: a desk-scale laboratory for grounded word learning.

Builds paired frame/utterance datasets from transcript records, trains
dual-encoder contrastive models (three variants), and evaluates learned
word-referent mappings with 4-way looking-while-listening trials.
"""

__version__ = "0.1.0"
