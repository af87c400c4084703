"""Qubit readout discrimination: simulation, demodulation, training and fixed-point emulation."""
