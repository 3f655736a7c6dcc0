"""Unit tests for MMES"""
