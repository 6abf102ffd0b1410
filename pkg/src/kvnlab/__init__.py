"""Deconjugated (Koopman-von Neumann) mechanics as a computer-algebra toolkit."""
from .algebra import Expr, Kind, Symbol, hbar_term, normal_form, parameter, underline
from .brackets import RelationTable, canonical_table, commutator, dbracket, mccoy_bracket, partial, translate
from .deconjugation import TheoryError, TildeTheory, build_theory, tilde_hamiltonian, tilde_image, tilde_lagrangian
from .dsl import ParseError, format_expr, parse_expr
from .dynamics import alpha_decoupling, conserved_check, dynamical_momentum, eom, extra_terms

__version__ = "0.1.0"
