"""
Сервисы ActiveGAN
"""
