"""escomatch: zero-shot skills matching against the ESCO taxonomy.

Pipeline: synthetic training-sentence generation per skill, dense-vector
candidate retrieval plus one-vs-all linear classifiers, zero-shot LLM
reranking (natural-language or mock-Python prompts), and macro-averaged
RP@k / MRR evaluation.
"""

__version__ = "0.1.0"
