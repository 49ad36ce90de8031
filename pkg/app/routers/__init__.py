"""
HTTP маршруты: пресеты, запуск экспериментов, анализ.
"""
