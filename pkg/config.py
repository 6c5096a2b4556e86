"""
多维偏好评分 (MPS) - 配置文件
"""

# 偏好维度（报告与 pairs.jsonl 中的顺序）
DIMENSIONS = ('overall', 'aesthetics', 'alignment', 'detail')

# 偏好维度中文名称
DIMENSION_NAMES = {
    'overall': '综合',
    'aesthetics': '美学',
    'alignment': '语义对齐',
    'detail': '细节质量',
}

# 各偏好条件的属性词
CONDITION_WORDS = {
    'aesthetics': ['light', 'color', 'clarity', 'tone', 'style', 'ambiance', 'artistry'],
    'detail': ['shape', 'face', 'hair', 'hands', 'limbs', 'structure', 'instance', 'texture'],
    'alignment': ['quantity', 'attributes', 'position', 'number', 'location'],
}
# 综合条件 = 其余三组的并集（去重，保持顺序）
CONDITION_WORDS['overall'] = list(dict.fromkeys(
    CONDITION_WORDS['aesthetics'] + CONDITION_WORDS['detail'] + CONDITION_WORDS['alignment']
))

# 提示词类别
PROMPT_CATEGORIES = ('Characters', 'Scenes', 'Objects', 'Animals', 'Plants', 'Arts', 'Food')

# 合成提示词的主体词（按类别）
CATEGORY_SUBJECTS = {
    'Characters': ['woman', 'knight', 'astronaut', 'chef', 'dancer', 'wizard'],
    'Scenes': ['forest', 'harbor', 'kitchen', 'desert', 'street', 'canyon'],
    'Objects': ['bicycle', 'lantern', 'clock', 'teapot', 'robot', 'guitar'],
    'Animals': ['fox', 'peacock', 'rabbit', 'whale', 'owl', 'tiger'],
    'Plants': ['cactus', 'orchid', 'bamboo', 'sunflower', 'fern', 'willow'],
    'Arts': ['mosaic', 'sculpture', 'tapestry', 'fresco', 'origami', 'mural'],
    'Food': ['pizza', 'dumpling', 'pancake', 'sushi', 'cupcake', 'noodles'],
}

PROMPT_ADJECTIVES = ['quiet', 'golden', 'ancient', 'tiny', 'bright', 'misty', 'elegant', 'playful']
PROMPT_PREPOSITIONS = ['near', 'inside', 'above', 'beside', 'behind']
PROMPT_PLACES = ['the lake', 'a garden', 'the city', 'a studio', 'the hills', 'a market']

# 词表保留符号（id 依次为 0..3）
BOS_TOKEN = '<bos>'
EOS_TOKEN = '<eos>'
PAD_TOKEN = '<pad>'
UNK_TOKEN = '<unk>'
RESERVED_TOKENS = (BOS_TOKEN, EOS_TOKEN, PAD_TOKEN, UNK_TOKEN)

# 检查点文件
CHECKPOINT_MAGIC = b'MPSCKPT1'
CHECKPOINT_VERSION = 1

# 报告与导出文件的 schema 版本
REPORT_SCHEMA_VERSION = 1
ATTENTION_SCHEMA_VERSION = 1

# 概率裁剪下限
PROB_CLAMP_EPS = 1e-7


# 运行默认配置（分组前缀与 TOML 小节一一对应）
class Config:
    SEED = 0
    THREADS = 1

    # [model]
    MODEL_WIDTH = 64
    MODEL_DEPTH = 2
    MODEL_HEADS = 4
    MODEL_CROSS_HEADS = 4
    MODEL_IMAGE_SIZE = 32
    MODEL_CHANNELS = 3
    MODEL_PATCH_SIZE = 8
    MODEL_MAX_LENGTH = 32
    MODEL_VOCAB_SIZE = 2048
    MODEL_FUSION = 'cross_attention'
    MODEL_MASK_MODE = 'hard'
    MODEL_THRESHOLD = 0.0
    MODEL_STRAIGHT_THROUGH = True
    MODEL_SOFT_MASK_SCALE = 1.0
    MODEL_DTYPE = 'float32'

    # [train]
    TRAIN_STEPS = 2000
    TRAIN_BATCH_SIZE = 32
    TRAIN_PEAK_LR = 1e-3
    TRAIN_WARMUP_STEPS = 100
    TRAIN_DIMENSIONS = list(DIMENSIONS)
    TRAIN_WEIGHT_DECAY = 0.01
    TRAIN_EVAL_EVERY = 200
    TRAIN_CHECKPOINT_EVERY = 500
    TRAIN_LOG_EVERY = 1

    # [data]
    DATA_PROMPTS_PER_CATEGORY = 100
    DATA_IMAGES_PER_PROMPT = 2
    DATA_SAME_MODEL_FRACTION = 0.2
    DATA_NOISE_RATE = 0.0
    DATA_TIE_BAND = 0.0
    DATA_GENERATOR_COUNT = 6
    DATA_SPLIT_FRACTIONS = [0.8, 0.1, 0.1]

    # [eval]
    EVAL_SPLIT = 'test'
    EVAL_TIE_POLICY = 'exclude'
    EVAL_BATCH_SIZE = 64
