"""Decentralized risk-aware multi-target tracking with connectivity maintenance."""
