import logging
from typing import List

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import pandas as pd

from align.trainer import EpochRecord


logger = logging.getLogger(__name__)

# Colors
LOSS_COLORS = {'l_ae': '#3264c8', 'l_ap': '#c83232', 'l_total': '#404040'}
LUC_COLOR = '#32a050'
SDM_COLOR = '#b46414'


def plot_training_log(log: List[EpochRecord], best_epoch: int, path: str):
    """Per-epoch L_AE, L_AP and total loss with the selected epoch marked"""
    epochs = [r.epoch for r in log]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, [r.l_ae for r in log], color=LOSS_COLORS['l_ae'], label='L_AE')
    ax.plot(epochs, [r.l_ap for r in log], color=LOSS_COLORS['l_ap'], label='L_AP')
    ax.plot(epochs, [r.l_total for r in log], color=LOSS_COLORS['l_total'], linestyle='--', label='total')
    ax.axvline(best_epoch, color='gray', linewidth=0.8, linestyle=':')
    ax.set_xlabel('epoch')
    ax.set_ylabel('loss')
    ax.set_title(f'Pretraining (best epoch {best_epoch})')
    ax.legend(loc='upper right')
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.debug("wrote %s", path)


def plot_sweep(frame: pd.DataFrame, axis: str, path: str):
    """LUC F1 and SDM KL per setting, error bars from the seed spread; failed settings are skipped"""
    ok = frame[frame['status'] == 'ok']
    fig, (ax_luc, ax_sdm) = plt.subplots(1, 2, figsize=(11, 4))
    x = range(len(ok))
    ax_luc.errorbar(x, ok['luc_f1'], yerr=ok['luc_f1_std'], color=LUC_COLOR, marker='o', capsize=3)
    ax_luc.set_ylabel('LUC macro F1')
    ax_sdm.errorbar(x, ok['sdm_kl'], yerr=ok['sdm_kl_std'], color=SDM_COLOR, marker='o', capsize=3)
    ax_sdm.set_ylabel('SDM KL')
    for ax in (ax_luc, ax_sdm):
        ax.set_xticks(list(x))
        ax.set_xticklabels(ok['setting'], rotation=45, ha='right', fontsize=8)
        ax.grid(alpha=0.3)
    fig.suptitle(f'Sweep over {axis}')
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.debug("wrote %s", path)
