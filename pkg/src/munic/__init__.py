"""munic"""
