"""
EVA Testing Tools
pytest 测试套件与长时间运行的验收检查工具
"""

from .eva_test import AcceptanceTester, TestResult, TestStatus

__all__ = ["AcceptanceTester", "TestResult", "TestStatus"]
