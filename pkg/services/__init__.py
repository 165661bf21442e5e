"""
Services module for the bosonic control toolkit.
"""
