"""Interactive formative-feedback engine.

Generates structured, rubric-judged feedback through a generate-evaluate-revise
loop and answers student follow-up questions with a closed-loop tool-calling
agent over course materials.
"""

__version__ = "0.1.0"
