"""Energy measures, index estimates and derivatives on cell tables.

Modules:
    - measure: cell Gram tables, dominant measures, ratios and audits
    - index: Gram-matrix fields and numerical ranks
    - derivative: slopes df/dg, remainders and oscillation
    - stats: weighted quantiles
    - export: CSV/JSON writers
"""
