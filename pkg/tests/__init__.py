"""Online Kernel Lab Tests"""
