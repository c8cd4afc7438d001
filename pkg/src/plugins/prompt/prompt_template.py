import re
import threading
from typing import Any, Dict, List, Optional, Union

from src.common.logger import get_module_logger, LogConfig, PROMPT_STYLE_CONFIG

prompt_config = LogConfig(
    console_format=PROMPT_STYLE_CONFIG["console_format"],
    file_format=PROMPT_STYLE_CONFIG["file_format"],
)
logger = get_module_logger("prompt_build", config=prompt_config)


class PromptManager:
    """按名字登记提示词模板"""

    def __init__(self):
        self._prompts: Dict[str, "Prompt"] = {}
        self._counter = 0
        self._lock = threading.Lock()

    def generate_name(self) -> str:
        """为未命名的模板生成名称"""
        self._counter += 1
        return f"prompt_{self._counter}"

    def register(self, prompt: "Prompt") -> None:
        with self._lock:
            if not prompt.name:
                prompt.name = self.generate_name()
            self._prompts[prompt.name] = prompt

    def get_prompt(self, name: str) -> "Prompt":
        with self._lock:
            if name not in self._prompts:
                raise KeyError(f"Prompt '{name}' not found")
            return self._prompts[name]

    def names(self) -> List[str]:
        with self._lock:
            return sorted(self._prompts)

    def format_prompt(self, name: str, **kwargs) -> str:
        return self.get_prompt(name).format(**kwargs)


# 全局单例
global_prompt_manager = PromptManager()


class Prompt(str):
    """可格式化的模板字符串，\\{ 与 \\} 表示字面花括号"""

    _TEMP_LEFT_BRACE = "__ESCAPED_LEFT_BRACE__"
    _TEMP_RIGHT_BRACE = "__ESCAPED_RIGHT_BRACE__"

    @staticmethod
    def _process_escaped_braces(template: str) -> str:
        return template.replace("\\{", Prompt._TEMP_LEFT_BRACE).replace("\\}", Prompt._TEMP_RIGHT_BRACE)

    @staticmethod
    def _restore_escaped_braces(template: str) -> str:
        return template.replace(Prompt._TEMP_LEFT_BRACE, "{").replace(Prompt._TEMP_RIGHT_BRACE, "}")

    @classmethod
    def _template_args(cls, processed: str) -> List[str]:
        args: List[str] = []
        for expr in re.findall(r"\{(.*?)\}", processed):
            if expr and expr not in args:
                args.append(expr)
        return args

    def __new__(cls, fstr: str, name: Optional[str] = None, args: Union[List[Any], tuple, None] = None, **kwargs):
        if isinstance(args, tuple):
            args = list(args)
        should_register = kwargs.pop("_should_register", True)

        if kwargs or args:
            obj = super().__new__(cls, cls._format_template(fstr, args=args, kwargs=kwargs))
        else:
            obj = super().__new__(cls, "")

        obj.template = fstr
        obj.name = name
        obj.args = cls._template_args(cls._process_escaped_braces(fstr))
        obj._args = args or []
        obj._kwargs = kwargs

        if should_register:
            global_prompt_manager.register(obj)
        return obj

    @classmethod
    def _format_template(cls, template: str, args: List[Any] = None, kwargs: Dict[str, Any] = None) -> str:
        processed = cls._process_escaped_braces(template)
        template_args = cls._template_args(processed)

        formatted_args = {}
        if args:
            if len(args) > len(template_args):
                logger.error(f"构建提示词失败，模板参数 {template_args}，输入参数 {args}，模板为 {template}")
                raise ValueError("格式化模板失败")
            for key, arg in zip(template_args, args):
                formatted_args[key] = arg.format(**(kwargs or {})) if isinstance(arg, Prompt) else arg

        formatted_kwargs = {}
        for key, value in (kwargs or {}).items():
            if isinstance(value, Prompt):
                remaining = {k: v for k, v in kwargs.items() if k != key}
                formatted_kwargs[key] = value.format(**remaining)
            else:
                formatted_kwargs[key] = value

        try:
            return cls._restore_escaped_braces(processed.format(**formatted_args, **formatted_kwargs))
        except (IndexError, KeyError) as e:
            raise ValueError(f"格式化模板失败: {template}, args={formatted_args}, kwargs={formatted_kwargs} {e}") from e

    def format(self, *args, **kwargs) -> str:
        ret = type(self)(
            self.template,
            self.name,
            args=list(args) if args else self._args,
            _should_register=False,
            **(kwargs if kwargs else self._kwargs),
        )
        return str(ret)

    def __str__(self) -> str:
        if self._kwargs or self._args:
            return super().__str__()
        return self.template

    def __repr__(self) -> str:
        return f"Prompt(template={self.template!r}, name={self.name!r})"
