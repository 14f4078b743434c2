# -*- coding: utf-8 -*-
"""
纤维方向异常检测 - 核心模块

在纤维增强材料的三维图像中，用局部方向场、方向熵与变点检验判断是否存在
方向分布异常的区域，并用 SAEM 混合分离给出异常区域的位置。
"""

__version__ = "1.0.0"
__author__ = "Materials AI Team"
__description__ = "纤维方向异常检测 - 方向熵、变点检验与 SAEM 定位"
