"""Oráculo tabular exacto: dual cerrado, ascenso exacto e identidades del ELBO."""
