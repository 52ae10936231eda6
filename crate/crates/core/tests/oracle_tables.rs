// Tail probabilities from adaptive quadrature of the densities at 50 digits.
const T_ORACLE: &[(f64, f64, f64)] = &[
    (1.0, 0.0, -0.69314718055994530942),
    (1.0, 0.25, -0.86270051208687483822),
    (1.0, 1.0, -1.3862943611198906188),
    (1.0, 1.5, -1.6757537891407273607),
    (1.0, 2.0, -1.9133603645040102603),
    (1.0, 3.0, -2.2787085952902986559),
    (1.0, 5.0, -2.7672755312468292584),
    (1.0, 8.0, -3.2293448301554202742),
    (1.0, 12.0, -3.6319444140799968674),
    (1.0, 20.0, -4.1412945913398824177),
    (1.0, 30.0, -4.5462974596768046961),
    (1.0, 40.0, -4.8338176168946644198),
    (3.0, 0.0, -0.69314718055994530942),
    (3.0, 0.25, -0.89314905010078926133),
    (3.0, 1.0, -1.6321892244941224947),
    (3.0, 1.5, -2.1602878227377666202),
    (3.0, 2.0, -2.6640861743156114582),
    (3.0, 3.0, -3.5461846754509078663),
    (3.0, 5.0, -4.8670261049204212319),
    (3.0, 8.0, -6.1956446496610145717),
    (3.0, 12.0, -7.3817542383088889014),
    (3.0, 20.0, -8.8984417139462599084),
    (3.0, 30.0, -10.10986243376751041),
    (3.0, 40.0, -10.971162936870326005),
    (8.0, 0.0, -0.69314718055994530942),
    (8.0, 0.25, -0.90524268010649516855),
    (8.0, 1.0, -1.7527498155943414919),
    (8.0, 1.5, -2.4533888436564843463),
    (8.0, 2.0, -3.2124435817042329308),
    (8.0, 3.0, -4.7634814370300938562),
    (8.0, 5.0, -7.5494246784750335332),
    (8.0, 8.0, -10.732036208933155075),
    (8.0, 12.0, -13.746046648511699426),
    (8.0, 20.0, -17.709222653871103589),
    (8.0, 30.0, -20.913503236410378994),
    (8.0, 40.0, -23.20105474531434625),
    (30.0, 0.0, -0.69314718055994530942),
    (30.0, 0.25, -0.91094080692673275443),
    (30.0, 1.0, -1.8161281418575997086),
    (30.0, 1.5, -2.6306314235722182708),
    (30.0, 2.0, -3.6004099830056947486),
    (30.0, 3.0, -5.9163637414983265682),
    (30.0, 5.0, -11.360346642706573355),
    (30.0, 8.0, -19.581303156737295024),
    (30.0, 12.0, -28.907531385111042389),
    (30.0, 20.0, -42.53285720499674579),
    (30.0, 30.0, -54.122321328850694197),
    (30.0, 40.0, -62.546234647299175603),
];
const CHI2_ORACLE: &[(u64, f64, f64)] = &[
    (2, 0.01, -0.0050000000000000001041),
    (2, 0.5, -0.25),
    (2, 2.0, -1.0),
    (2, 7.5, -3.75),
    (2, 20.0, -10.0),
    (2, 60.0, -30.0),
    (2, 150.0, -75.0),
    (2, 400.0, -200.0),
    (2, 900.0, -450.0),
    (4, 0.01, -0.000012458488960926388416),
    (4, 0.5, -0.026856448685790244234),
    (4, 2.0, -0.30685281944005469058),
    (4, 7.5, -2.1918553819534501588),
    (4, 20.0, -7.6021047272016294559),
    (4, 60.0, -26.566012795514853754),
    (4, 150.0, -70.669266659713668921),
    (4, 400.0, -194.69669509194092425),
    (4, 900.0, -443.88853266049732165),
    (6, 0.01, -2.0755364581944335295e-8),
    (6, 0.5, -0.0021638360954187432194),
    (6, 2.0, -0.083709268125844934816),
    (6, 7.5, -1.2834907153517157838),
    (6, 20.0, -5.8891261358266887512),
    (6, 60.0, -23.82413272989423882),
    (6, 150.0, -67.031507384778679775),
    (6, 400.0, -190.08651261288553844),
    (6, 900.0, -438.4702075851699995),
    (10, 0.01, -2.5933391898395733578e-14),
    (10, 0.5, -6.6117324184888619875e-6),
    (10, 2.0, -0.0036665604523085089927),
    (10, 7.5, -0.38927541710660293609),
    (10, 20.0, -3.531783809459778794),
    (10, 60.0, -19.435604408046576944),
    (10, 150.0, -60.854063752563416104),
    (10, 400.0, -181.96468470744781114),
    (10, 900.0, -428.73215488696848747),
    (20, 0.01, -2.6789399703472349934e-30),
    (20, 0.5, -2.0942485399975804099e-13),
    (20, 2.0, -1.1142548454653975e-7),
    (20, 7.5, -0.0053213068929388220454),
    (20, 20.0, -0.78103956849627799636),
    (20, 60.0, -11.852356955071915053),
    (20, 150.0, -48.818597749257387348),
    (20, 400.0, -165.07117125642677532),
    (20, 900.0, -407.79844259117405623),
    (40, 0.01, -3.9012826118759383383e-65),
    (40, 0.5, -2.9464581044918578163e-31),
    (40, 2.0, -1.5875276010732629574e-19),
    (40, 7.5, -3.5516580341258251436e-9),
    (40, 20.0, -0.003460321990414991111),
    (40, 60.0, -3.8224808632974076888),
    (40, 150.0, -32.021247553960614688),
    (40, 400.0, -138.57260673451480368),
    (40, 900.0, -373.22114240691635359),
    (100, 0.01, -2.9060056331185985494e-180),
    (100, 0.5, -2.0299524618646414326e-95),
    (100, 2.0, -1.2337508979097351272e-65),
    (100, 7.5, -4.1975926499172974675e-38),
    (100, 20.0, -1.8547268838697993007e-19),
    (100, 60.0, -0.00051902613331134146371),
    (100, 150.0, -7.0087563747849915567),
    (100, 400.0, -84.669265662003493131),
    (100, 900.0, -295.0976292236336585),
    (200, 0.01, -8.4109839979883997411e-389),
    (200, 0.5, -5.2059487067099018597e-219),
    (200, 2.0, -3.9812808189568544112e-159),
    (200, 7.5, -6.6213150628119195982e-103),
    (200, 20.0, -5.3985897281395814888e-63),
    (200, 60.0, -7.3384686328783333487e-24),
    (200, 150.0, -0.0033580735210606730316),
    (200, 400.0, -33.926896945131679417),
    (200, 900.0, -204.07103076578333115),
];
