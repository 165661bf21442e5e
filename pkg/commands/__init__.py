"""
Commands package for Flask CLI blueprints.
"""
