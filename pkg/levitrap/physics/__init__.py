"""Trap mathematics, Langevin dynamics and decoherence budgets."""
