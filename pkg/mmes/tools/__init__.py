"""MMES Tools Package"""
