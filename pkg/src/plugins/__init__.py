"""
CountingTricks 插件
包含场景生成、渲染、提示词、评测指标、注意力份额与玩具模型
"""
