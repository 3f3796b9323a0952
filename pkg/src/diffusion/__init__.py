"""Proceso de difusión: schedule, distribuciones sintéticas, red de ruido y muestreo."""
