# 这个文件可以为空，但必须存在
