"""
Константы ActiveGAN
"""

# Численные допуски
NUMERICS = {
    'log_clamp': 1e-12,
    'distribution_atol': 1e-6,
    'adam_beta1': 0.9,
    'adam_beta2': 0.999,
    'adam_eps': 1e-8,
    'fd_step': 1e-4,
}

# Архитектуры по умолчанию
NETWORK_DEFAULTS = {
    'hidden_width': 64,
    'hidden_layers': 2,
    'leaky_slope': 0.2,
    'log_sigma_min': -5.0,
    'log_sigma_max': 2.0,
}

# Параметры вознаграждения
REWARD_DEFAULTS = {
    'epsilon': 0.2,
    'alpha': 0.5,
    'truncation_constant': 0.0,
    'lam': 0.1,
}

# Параметры обучения
TRAIN_DEFAULTS = {
    'iterations': 2000,
    'batch_size': 64,
    'warmup_iterations': 500,
    'buffer_size': 4096,
    'd_update_every': 1,
    'learning_rate': 0.001,
    'latent_dim': 2,
    'checkpoint_every': 500,
    'exploration_scale': 0.02,
}

# Классификатор
CLASSIFIER_DEFAULTS = {
    'regularization_grid': [0.0001, 0.001, 0.01, 0.1],
    'learning_rate_grid': [0.5],
    'folds': 3,
    'epochs': 300,
    'full_batch_limit': 10000,
    'minibatch_size': 128,
}

# Парные опыты на смеси гауссиан с перекрытием классов
TRIAL_DEFAULTS = {
    'noise': 1.0,
    'mechanism_labeled': 100,
    'augmentation_labeled': 30,
    'test_per_class': 200,
    'iterations': 2000,
    'mechanism_count': 1000,
    'augmentation_count': 500,
}

# Оценка
EVALUATION_DEFAULTS = {
    'generated_count': 500,
    'filter_margin': 0.2,
    'histogram_bins': 20,
    'filter_max_rounds': 50,
}

# Формат IDX
IDX_MAGIC = {
    'images': 0x00000803,
    'labels': 0x00000801,
}

# Контейнер параметров
PARAM_STORE = {
    'magic': b'AGAN',
    'version': 1,
}

# Заголовки CSV
CSV_HEADERS = {
    'trace': ['iteration', 'L_D', 'L_G_acgan', 'L_unc', 'mean_reward',
              'mean_u_m', 'mean_u_le', 'buffer_len'],
    'scatter': ['x', 'y', 'label', 'source'],
}

# Имена файлов запуска
FILE_PATHS = {
    'trace': 'trace.csv',
    'samples': 'generated_samples.csv',
    'resolved_config': 'resolved_config.json',
    'manifest': 'manifest.json',
    'checkpoint_dir': 'checkpoints',
    'final_checkpoint': 'final.agan',
    'report_json': 'report.json',
    'report_html': 'report.html',
    'sweep': 'sweep.csv',
    'scatter': 'scatter.csv',
    'log': 'run.log',
}

# Коды завершения CLI
EXIT_CODES = {
    'success': 0,
    'validation': 2,
    'divergence': 3,
    'io': 4,
}

# Сообщения
MESSAGES = {
    'stratify_fallback': 'Class too small for stratified split, falling back to unstratified split',
    'filter_shortfall': 'Margin filter kept fewer samples than requested',
    'baseline_only': 'Baseline-only evaluation requested, skipping generative runs',
}

# HTML шаблоны
HTML_TEMPLATES = {
    'DOCTYPE': '<!DOCTYPE html>',
    'META_CHARSET': '<meta charset="UTF-8">',
    'META_VIEWPORT': '<meta name="viewport" content="width=device-width, initial-scale=1.0">',
}

# CSS классы
CSS_CLASSES = {
    'container': 'container',
    'stats': 'stats',
    'stat_card': 'stat-card',
    'stat_number': 'stat-number',
    'stat_label': 'stat-label',
    'positive': 'delta-positive',
    'negative': 'delta-negative',
}
