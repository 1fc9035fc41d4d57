"""Walk through exact inference on a hand-built 5-rule grammar.

Builds explicit rule probabilities (no neural parameterization), runs
the inside pass for the total parse probability, the outside pass for
span marginals, and both decoders, then cross-checks everything against
the brute-force enumeration oracle.
"""

import numpy as np

from pairgram.autodiff import Tensor
from pairgram.chart import (
    brute_force_logZ,
    inside,
    mbr_decode,
    outside_and_marginals,
    viterbi_decode,
)
from pairgram.grammar import RuleProbs

# Grammar: S -> A0 | A1; A0 -> A1 A1 | T0 T1; A1 -> T0 T0 | T1 T1
# Symbols 0..1 are nonterminals, 2..3 are the preterminals T0, T1.
n_nt, n_pt = 2, 2
binary = np.full((n_nt, 4, 4), -np.inf)
binary[0, 1, 1] = np.log(0.5)
binary[0, 2, 3] = np.log(0.5)
binary[1, 2, 2] = np.log(0.7)
binary[1, 3, 3] = np.log(0.3)
rules = RuleProbs(
    start=Tensor(np.log([0.4, 0.6])),
    binary=Tensor(binary),
    terminal=None,
    n_nonterminals=n_nt,
    n_preterminals=n_pt,
)

# token sequence "a a b b" with emissions T0 -> a, T1 -> b (soft)
term_lp = Tensor(np.log(np.array([
    [0.9, 0.1],
    [0.9, 0.1],
    [0.2, 0.8],
    [0.2, 0.8],
])))

chart, log_z = inside(rules, term_lp)
print(f"log Z (inside)      = {log_z.item():.6f}")
print(f"log Z (brute force) = {brute_force_logZ(rules, term_lp):.6f}")

marginals = outside_and_marginals(chart)
print("\nposterior span marginals (width >= 2):")
for (a, b) in marginals.spans:
    print(f"  ({a},{b}) -> {marginals.value(a, b):.4f}")
print(f"sum = {marginals.total():.6f} (always n - 1 = 3)")

tree = mbr_decode(marginals)
print(f"\nMBR bracketing:     {tree.to_span_text()}")
vit, log_p = viterbi_decode(rules, term_lp)
print(f"Viterbi bracketing: {vit.to_span_text()}  (log p = {log_p:.4f})")
print(f"Viterbi s-expr over tokens: {vit.to_sexpr(['a', 'a', 'b', 'b'])}")
