"""MTJEngine package: stochastic switching models for magnetic tunnel junctions."""
