"""Multi-label graph condensation."""
