"""
Сервисы с вычислительной логикой: динамика, клонирование, GEV, кривые возврата, эксперименты.
"""
