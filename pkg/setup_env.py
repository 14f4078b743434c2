#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
环境配置工具
创建 .env 文件并检查日志级别、配置目录与运行配置是否可用
"""

import os
import sys
from pathlib import Path

from dotenv import dotenv_values

# 添加项目路径
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from src.config import LOG_LEVELS, config, load_pipeline_config
from src.exceptions import ConfigError


def create_env_file(env_path: str = ".env", example_path: str = "env_example.txt") -> bool:
    """创建.env文件"""
    env_file = Path(env_path)
    env_example = Path(example_path)

    if env_file.exists():
        print("✅ .env文件已存在")
        return True

    if not env_example.exists():
        print(f"❌ {example_path}文件不存在")
        return False

    env_file.write_text(env_example.read_text(encoding='utf-8'), encoding='utf-8')
    print("✅ 已创建.env文件")
    return True


def check_log_level(env_path: str = ".env") -> bool:
    """检查 LOG_LEVEL 是否为合法取值"""
    values = dotenv_values(env_path) if Path(env_path).exists() else {}
    level = (values.get("LOG_LEVEL") or os.getenv("LOG_LEVEL") or "INFO").strip().upper()
    if level in LOG_LEVELS:
        print(f"✅ LOG_LEVEL={level}")
        return True
    print(f"❌ LOG_LEVEL={level} 无效，可选: {', '.join(LOG_LEVELS)}")
    return False


def check_run_configs(configs_dir: str = config.CONFIGS_DIR) -> bool:
    """逐个校验 configs 目录下的运行配置"""
    if not os.path.isdir(configs_dir):
        print(f"❌ 配置目录不存在: {configs_dir}")
        return False
    ok = True
    for name in sorted(os.listdir(configs_dir)):
        if not name.endswith(".conf"):
            continue
        try:
            load_pipeline_config(os.path.join(configs_dir, name))
            print(f"✅ {name}")
        except ConfigError as e:
            print(f"❌ {name}: {e}")
            ok = False
    return ok


def interactive_setup() -> bool:
    """交互式设置"""
    print(f"🧵 {config.APP_NAME} - 环境配置")
    print("=" * 50)

    if not Path(".env").exists():
        print("\n📝 创建环境配置文件...")
        if not create_env_file():
            return False

    if not check_log_level():
        print("\n🔧 请编辑.env文件，修改 LOG_LEVEL")
        return False

    print("\n📋 校验运行配置...")
    if not check_run_configs():
        return False

    print("\n🎉 环境配置完成！")
    return True


def main():
    """主函数"""
    try:
        if interactive_setup():
            print("\n✅ 可以开始运行了:")
            print("   完整流水线: python src/main_cli.py pipeline --config configs/layered.conf")
            print("   临界值表:   python src/main_cli.py calibrate")
        else:
            print("\n❌ 环境配置未完成，请按照提示修改")
            sys.exit(1)
    except Exception as e:
        print(f"❌ 配置过程中出现错误: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
