# Tools tests package