"""Word-substitution attacks on black-box ranking models.

A hidden bilinear ranker is exposed through a rank-positions-only oracle;
an attacker trains a surrogate ranker from pseudo-relevance feedback,
finds influential tokens by gradient magnitude, perturbs their embeddings
by iterated gradient steps, and greedily substitutes rank-verified
synonyms. Step-wise and term-spamming baselines, SR/PP/SS metrics and a
term-density spam detector round out the experiment harness.
"""

__version__ = "0.1.0"
